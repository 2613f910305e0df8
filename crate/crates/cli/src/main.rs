use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ichseg_core::pipeline::{
    self, Overrides, PipelineConfig, PipelineError, SegmenterSource, ValidConfig, OUTPUT_DIR_ENV,
};
use ichseg_core::segmentation::VariantKind;
use ichseg_core::synthetic::{write_fixture, SyntheticSpec};

/// Weakly supervised intracranial hemorrhage segmentation.
///
/// Exit codes: 0 success, 1 invalid configuration, 2 runtime error,
/// 3 some slices failed.
#[derive(Debug, Parser)]
#[command(name = "ichseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Variant {
    Bbox,
    Point,
    PointBbox,
}

impl From<Variant> for VariantKind {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Bbox => VariantKind::BBox,
            Variant::Point => VariantKind::Point,
            Variant::PointBbox => VariantKind::PointBBox,
        }
    }
}

/// Config file plus the fields flags may override.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// Pipeline config (JSON). Relative paths inside it resolve against its directory.
    #[arg(short, long)]
    config: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory (beats $ICHSEG_OUTPUT_DIR).
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 means one per core.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    variant: Option<Variant>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ValidConfig, PipelineError> {
        let mut config = PipelineConfig::load(&self.config)?;
        let flags = Overrides {
            manifest: self.manifest.clone(),
            output_dir: self.output_dir.clone(),
            seed: self.seed,
            workers: self.workers,
            variant: self.variant.map(Into::into),
        };
        config.apply_overrides(std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from), &flags);
        config.validate()
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a config and print it with defaults filled in.
    Validate(ConfigArgs),
    /// Write the windowed three-channel composite of every slice.
    Preprocess(ConfigArgs),
    /// Run the detector and write every box to detections.json.
    Detect(ConfigArgs),
    /// Detect, prompt, segment and vote; write masks and run_report.json.
    Segment(ConfigArgs),
    /// Score a previous segment run against the dataset.
    Evaluate(ConfigArgs),
    /// Segment, then evaluate.
    Run(ConfigArgs),
    /// Render overlays with contours, boxes and prompt points.
    Overlay {
        #[command(flatten)]
        config: ConfigArgs,
        /// Slice to render (repeatable); all slices when omitted.
        #[arg(long = "slice")]
        slices: Vec<String>,
    },
    /// Write the resolved dataset index, or convert a BHX label export.
    ExportIndex {
        /// Pipeline config; its manifest is indexed into `<output_dir>/index.json`.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long, requires = "config")]
        output_dir: Option<PathBuf>,
        /// BHX-style CSV (SOPInstanceUID, data, labelName) to convert.
        #[arg(long, requires = "annotations_out")]
        bhx: Option<PathBuf>,
        /// Where the converted canonical annotation CSV goes.
        #[arg(long)]
        annotations_out: Option<PathBuf>,
    },
    /// Generate a small synthetic dataset and a ready-to-run config.
    SynthFixture {
        /// Directory to write into.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        patients: usize,
        #[arg(long, default_value_t = 4)]
        slices_per_patient: usize,
        #[arg(long, default_value_t = 64)]
        size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn synth_fixture(out: &Path, spec: &SyntheticSpec) -> Result<PathBuf, PipelineError> {
    let manifest = write_fixture(out, spec).map_err(|e| PipelineError::Runtime(e.to_string()))?;
    let config = PipelineConfig {
        manifest: manifest.file_name().map(PathBuf::from).unwrap_or_default(),
        output_dir: PathBuf::from("out"),
        segmenter: SegmenterSource::default(),
        ..PipelineConfig::default()
    };
    let path = out.join("pipeline.json");
    let text = serde_json::to_string_pretty(&config).expect("config serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| PipelineError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn execute(command: Command) -> Result<i32, PipelineError> {
    match command {
        Command::Validate(args) => {
            let v = args.load()?;
            println!(
                "{}",
                serde_json::to_string_pretty(&v.config).expect("config serializes")
            );
            Ok(0)
        }
        Command::Preprocess(args) => {
            let v = args.load()?;
            let m = pipeline::preprocess(&v)?;
            println!(
                "wrote {} composites to {}",
                m.slices.len(),
                v.config.output_dir.join(pipeline::COMPOSITES_DIR).display()
            );
            Ok(0)
        }
        Command::Detect(args) => {
            let v = args.load()?;
            let (file, summary) = pipeline::detect(&v)?;
            let boxes: usize = file.slices.values().map(Vec::len).sum();
            println!(
                "{} boxes over {} slices ({} failed) -> {}",
                boxes,
                file.slices.len(),
                summary.failed_slices.len(),
                v.config.output_dir.join(pipeline::DETECTIONS_FILE).display()
            );
            Ok(summary.exit_code())
        }
        Command::Segment(args) => {
            let v = args.load()?;
            let report = pipeline::segment(&v)?;
            print_summary(&report.summary);
            Ok(report.summary.exit_code())
        }
        Command::Evaluate(args) => {
            let v = args.load()?;
            print!("{}", pipeline::evaluate(&v)?.to_table());
            Ok(0)
        }
        Command::Run(args) => {
            let v = args.load()?;
            let (report, eval) = pipeline::run(&v)?;
            print_summary(&report.summary);
            print!("{}", eval.to_table());
            Ok(report.summary.exit_code())
        }
        Command::Overlay { config, slices } => {
            let v = config.load()?;
            let ids = (!slices.is_empty()).then_some(slices.as_slice());
            let written = pipeline::overlay(&v, ids)?;
            println!(
                "wrote {} overlays to {}",
                written.len(),
                v.config.output_dir.join(pipeline::OVERLAYS_DIR).display()
            );
            Ok(0)
        }
        Command::ExportIndex {
            config,
            output_dir,
            bhx,
            annotations_out,
        } => {
            if config.is_none() && bhx.is_none() {
                return Err(PipelineError::Validation(vec![pipeline::ConfigIssue {
                    path: "<args>".into(),
                    message: "give --config, --bhx or both".into(),
                }]));
            }
            if let (Some(input), Some(output)) = (&bhx, &annotations_out) {
                let ann = pipeline::convert_bhx_file(input, output)?;
                for r in &ann.rejected {
                    eprintln!("row {} rejected: {}", r.row, r.reason);
                }
                println!(
                    "converted {} boxes ({} rows rejected) -> {}",
                    ann.boxes.len(),
                    ann.rejected.len(),
                    output.display()
                );
            }
            if let Some(config) = config {
                let args = ConfigArgs {
                    config,
                    manifest: None,
                    output_dir,
                    seed: None,
                    workers: None,
                    variant: None,
                };
                let v = args.load()?;
                println!("wrote {}", pipeline::export_index(&v)?.display());
            }
            Ok(0)
        }
        Command::SynthFixture {
            out,
            patients,
            slices_per_patient,
            size,
            seed,
        } => {
            let spec = SyntheticSpec {
                patients,
                slices_per_patient,
                size,
                seed,
                ..SyntheticSpec::default()
            };
            let config = synth_fixture(&out, &spec)?;
            println!(
                "wrote {} slices and {}",
                patients * slices_per_patient,
                config.display()
            );
            Ok(0)
        }
    }
}

fn print_summary(s: &pipeline::RunSummary) {
    println!(
        "{} slices, {} failed, {} failed boxes, {} members fell back to box-only prompts",
        s.slices,
        s.failed_slices.len(),
        s.failed_boxes,
        s.degraded_members
    );
    for id in &s.failed_slices {
        println!("  failed: {id}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
