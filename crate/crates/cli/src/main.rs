use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use slideprompt::evaluate::{compare_runs, counts, MetricReport};
use slideprompt::fixtures::{preset, prompt_dataset, synth_slide, write_records, Preset, Stage};
use slideprompt::pipeline::{replay, Grouping, Pipeline, PipelineConfig, RunManifest};
use slideprompt::postprocess::{postprocess_mask, PostprocessConfig};
use slideprompt::predictor::{serve, serve_tcp, BackendSpec, PredictorBackend, SlideImage};
use slideprompt::prompting::{plan_prompts, PromptConfig};
use slideprompt::raster::{load_mask, load_probmap, save_mask, save_probmap, Class, Connectivity, LabelMask};
use slideprompt::{Error, Result};

#[derive(Parser)]
#[command(
    name = "slideprompt",
    version,
    about = "Prompt-based refinement of slide segmentation masks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Drop low-confidence in-situ candidates from an initial mask.
    Postprocess(PostprocessCmd),
    /// Plan point prompts for the melanoma components of a mask.
    Plan(PlanCmd),
    /// Run the full refinement pipeline.
    Run(RunCmd),
    /// Rerun a manifest and check it reproduces the recorded digests.
    Replay(ReplayCmd),
    /// IoU and F1 of predictions against ground truth.
    Eval(EvalCmd),
    /// Per-slide and aggregate deltas between two metric reports.
    Compare(CompareCmd),
    /// Write a synthetic slide.
    Synth(SynthCmd),
    /// Build point-prompt training records from a labeled mask.
    Dataset(DatasetCmd),
    /// Serve a test backend over the predictor protocol.
    Serve(ServeCmd),
}

fn parse_connectivity(s: &str) -> Result<Connectivity, String> {
    s.parse::<u8>()
        .map_err(|e| e.to_string())
        .and_then(|n| Connectivity::from_neighbors(n).map_err(|e| e.to_string()))
}

#[derive(Args, Clone)]
struct PostprocessArgs {
    /// Area ratio to the touched epidermis below which a component is an
    /// in-situ candidate.
    #[arg(long, default_value_t = 0.1)]
    alpha_m: f64,
    /// High-confidence probability threshold (strict).
    #[arg(long, default_value_t = 0.8)]
    beta: f32,
    /// Minimum high-confidence share for a candidate to be kept.
    #[arg(long, default_value_t = 0.4)]
    alpha_c: f64,
    /// 4 or 8.
    #[arg(long, default_value = "8", value_parser = parse_connectivity)]
    connectivity: Connectivity,
}

impl PostprocessArgs {
    fn config(&self) -> PostprocessConfig {
        PostprocessConfig {
            alpha_m: self.alpha_m,
            beta: self.beta,
            alpha_c: self.alpha_c,
            connectivity: self.connectivity,
        }
    }
}

#[derive(Args, Clone)]
struct PromptArgs {
    /// Patch side fed to the predictor.
    #[arg(long, default_value_t = 512)]
    side: u32,
    /// Elongation above which components are grid-prompted.
    #[arg(long, default_value_t = 3.0)]
    alpha_b: f64,
    /// Grid lattice spacing.
    #[arg(long, default_value_t = 64)]
    gap: u32,
    /// Use the rounded centroid even when it falls outside its component.
    #[arg(long)]
    strict_centroid: bool,
}

impl PromptArgs {
    fn config(&self, connectivity: Connectivity) -> PromptConfig {
        PromptConfig {
            patch_side: self.side,
            alpha_b: self.alpha_b,
            grid_gap: self.gap,
            connectivity,
            strict_centroid: self.strict_centroid,
            ..PromptConfig::default()
        }
    }
}

#[derive(Args)]
struct PostprocessCmd {
    /// Label mask (PGM, values 0/1/2).
    #[arg(long)]
    mask: PathBuf,
    /// Melanoma probability map (PFM).
    #[arg(long)]
    prob: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-component JSON-lines report.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    pp: PostprocessArgs,
}

#[derive(Args)]
struct PlanCmd {
    /// Label mask whose class-2 pixels are prompted.
    #[arg(long)]
    mask: PathBuf,
    /// JSON-lines plan, one point per line.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    prompt: PromptArgs,
    #[arg(long, default_value = "8", value_parser = parse_connectivity)]
    connectivity: Connectivity,
}

#[derive(Args)]
struct BackendArgs {
    /// mock, noisy-mock[:k=v,...], exec:<command> or tcp:<host:port>.
    #[arg(long, default_value = "mock")]
    backend: String,
    /// Ground-truth label mask, required by the mock backends.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
}

impl BackendArgs {
    fn connect(&self) -> Result<Box<dyn PredictorBackend>> {
        let spec: BackendSpec = self.backend.parse()?;
        let gt = match (&self.gt, spec.needs_ground_truth()) {
            (Some(p), true) => Some(load_mask(p)?),
            (None, true) => return Err(Error::Validation(format!("backend {} needs --gt", self.backend))),
            _ => None,
        };
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(Error::Validation("timeout must be a positive number of seconds".into()));
        }
        spec.connect(gt.as_ref(), Duration::from_secs_f64(self.timeout))
    }
}

#[derive(Args)]
struct RunCmd {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    prob: PathBuf,
    /// Raw interleaved 8-bit slide pixels (1, 3 or 4 channels) matching the
    /// mask dimensions; patches are sent inline.
    #[arg(long)]
    image: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Final mask (PGM, melanoma = 2).
    #[arg(long)]
    out: PathBuf,
    /// JSON-lines run manifest; written on failure too.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Maximum predictor requests in flight.
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Send all points of a component that share a patch in one request.
    #[arg(long)]
    joint: bool,
    /// Skip prompts the predictor rejects or times out on.
    #[arg(long)]
    best_effort: bool,
    #[command(flatten)]
    pp: PostprocessArgs,
    #[command(flatten)]
    prompt: PromptArgs,
}

#[derive(Args)]
struct ReplayCmd {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    prob: PathBuf,
    #[arg(long)]
    image: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Where to write the replayed final mask.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCmd {
    /// Predicted label masks; pairs with --gt in order.
    #[arg(long, required = true, num_args = 1..)]
    pred: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    gt: Vec<PathBuf>,
    /// Slide names; defaults to the prediction file stems.
    #[arg(long, num_args = 1..)]
    name: Vec<String>,
    /// Class evaluated.
    #[arg(long, default_value_t = 2)]
    class: u8,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareCmd {
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    method: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Streaks,
    Blobs,
    EpidermisAdjacent,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Streaks => Preset::Streaks,
            PresetArg::Blobs => Preset::Blobs,
            PresetArg::EpidermisAdjacent => Preset::EpidermisAdjacent,
        }
    }
}

#[derive(Args)]
struct SynthCmd {
    #[arg(long, value_enum)]
    preset: PresetArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Square slide side.
    #[arg(long, default_value_t = 2048)]
    size: u32,
    /// Writes gt.pgm, initial.pgm, prob.pfm and spec.json here.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    RandomPoint,
    Centered,
}

#[derive(Args)]
struct DatasetCmd {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = 512)]
    side: u32,
    #[arg(long, value_enum)]
    stage: StageArg,
    /// Random points per component in the centered stage.
    #[arg(long, default_value_t = 1)]
    random_points: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeCmd {
    #[command(flatten)]
    backend: BackendArgs,
    /// Listen on this address instead of stdin/stdout. The bound address is
    /// printed on the first line of stdout.
    #[arg(long)]
    listen: Option<String>,
    /// Exit after this many TCP sessions.
    #[arg(long)]
    sessions: Option<usize>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn load_image(path: Option<&PathBuf>, mask: &LabelMask) -> Result<Option<SlideImage>> {
    path.map(|p| SlideImage::load_raw(p, mask.width(), mask.height()))
        .transpose()
}

fn postprocess_cmd(cmd: PostprocessCmd) -> Result<()> {
    let mask = load_mask(&cmd.mask)?;
    let prob = load_probmap(&cmd.prob)?;
    let out = postprocess_mask(&mask, &prob, &cmd.pp.config())?;
    save_mask(&cmd.out, &out.mask.to_label_mask(Class::Melanoma))?;
    if let Some(path) = &cmd.report {
        out.report.write_jsonl(create(path)?)?;
    }
    eprintln!(
        "{} components: {} invasive, {} in-situ kept, {} in-situ dropped",
        out.report.records.len(),
        out.report.count(slideprompt::postprocess::Classification::Invasive),
        out.report.count(slideprompt::postprocess::Classification::InSituKept),
        out.report
            .count(slideprompt::postprocess::Classification::InSituDropped),
    );
    Ok(())
}

fn plan_cmd(cmd: PlanCmd) -> Result<()> {
    let mask = load_mask(&cmd.mask)?;
    let plan = plan_prompts(&mask.class_plane(Class::Melanoma), &cmd.prompt.config(cmd.connectivity))?;
    plan.write_jsonl(create(&cmd.out)?)?;
    eprintln!(
        "{} components, {} points{}",
        plan.components.len(),
        plan.point_count(),
        if plan.slide_escalated {
            ", slide escalated to grid prompts"
        } else {
            ""
        }
    );
    Ok(())
}

fn run_cmd(cmd: RunCmd) -> Result<()> {
    let mask = load_mask(&cmd.mask)?;
    let prob = load_probmap(&cmd.prob)?;
    let image = load_image(cmd.image.as_ref(), &mask)?;
    let backend = cmd.backend.connect()?;
    let pp = cmd.pp.config();
    let cfg = PipelineConfig {
        postprocess: pp,
        prompt: cmd.prompt.config(pp.connectivity),
        concurrency: cmd.concurrency,
        grouping: if cmd.joint { Grouping::Joint } else { Grouping::PerPoint },
        best_effort: cmd.best_effort,
    };
    let pipeline = Pipeline::new(backend.as_ref(), cfg).with_label(cmd.backend.backend.clone());
    match pipeline.run(&mask, &prob, image.as_ref()) {
        Ok(out) => {
            save_mask(&cmd.out, &out.final_mask.to_label_mask(Class::Melanoma))?;
            if let Some(path) = &cmd.manifest {
                out.manifest.write_jsonl(create(path)?)?;
            }
            let s = out.manifest.summary.as_ref().expect("complete runs have a summary");
            eprintln!(
                "{} requests ({} skipped); refined {} px, predicted {} px, final {} px",
                s.requests, s.skipped, s.refined_pixels, s.predicted_pixels, s.final_pixels
            );
            Ok(())
        }
        Err(failure) => {
            if let (Some(path), Some(m)) = (&cmd.manifest, &failure.manifest) {
                m.write_jsonl(create(path)?)?;
            }
            Err(failure.error)
        }
    }
}

fn replay_cmd(cmd: ReplayCmd) -> Result<()> {
    let recorded = RunManifest::read_jsonl(BufReader::new(File::open(&cmd.manifest)?))?;
    let mask = load_mask(&cmd.mask)?;
    let prob = load_probmap(&cmd.prob)?;
    let image = load_image(cmd.image.as_ref(), &mask)?;
    let backend = cmd.backend.connect()?;
    let out = replay(&recorded, &mask, &prob, image.as_ref(), backend.as_ref())?;
    if let Some(path) = &cmd.out {
        save_mask(path, &out.final_mask.to_label_mask(Class::Melanoma))?;
    }
    eprintln!("replay matches: {} requests", out.manifest.prompts.len());
    Ok(())
}

fn eval_cmd(cmd: EvalCmd) -> Result<()> {
    if cmd.pred.len() != cmd.gt.len() {
        return Err(Error::Validation(
            "--pred and --gt need the same number of files".into(),
        ));
    }
    if !cmd.name.is_empty() && cmd.name.len() != cmd.pred.len() {
        return Err(Error::Validation("--name needs one name per prediction".into()));
    }
    let class = Class::from_index(cmd.class).ok_or_else(|| Error::Validation(format!("no class {}", cmd.class)))?;
    let mut rows = Vec::new();
    for (i, (p, g)) in cmd.pred.iter().zip(&cmd.gt).enumerate() {
        let name = match cmd.name.get(i) {
            Some(n) => n.clone(),
            None => p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
        };
        let pred = load_mask(p)?.class_plane(class);
        let gt = load_mask(g)?.class_plane(class);
        rows.push((name, counts(&pred, &gt)?));
    }
    let text = MetricReport::from_counts(rows)?.to_tsv();
    match &cmd.out {
        Some(path) => create(path)?.write_all(text.as_bytes())?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn compare_cmd(cmd: CompareCmd) -> Result<()> {
    let base = MetricReport::from_tsv(&fs::read_to_string(&cmd.baseline)?)?;
    let method = MetricReport::from_tsv(&fs::read_to_string(&cmd.method)?)?;
    print!("{}", compare_runs(&base, &method)?.to_tsv());
    Ok(())
}

fn synth_cmd(cmd: SynthCmd) -> Result<()> {
    let spec = preset(cmd.preset.into(), cmd.seed, cmd.size, cmd.size)?;
    let slide = synth_slide(&spec)?;
    fs::create_dir_all(&cmd.out_dir)?;
    save_mask(cmd.out_dir.join("gt.pgm"), &slide.ground_truth)?;
    save_mask(cmd.out_dir.join("initial.pgm"), &slide.initial)?;
    save_probmap(cmd.out_dir.join("prob.pfm"), &slide.probmap)?;
    let mut f = create(&cmd.out_dir.join("spec.json"))?;
    serde_json::to_writer_pretty(&mut f, &spec).map_err(|e| Error::Internal(e.to_string()))?;
    f.write_all(b"\n")?;
    f.flush()?;
    eprintln!("{} recipes written to {}", spec.recipes.len(), cmd.out_dir.display());
    Ok(())
}

fn dataset_cmd(cmd: DatasetCmd) -> Result<()> {
    let mask = load_mask(&cmd.mask)?;
    let stage = match cmd.stage {
        StageArg::RandomPoint => Stage::RandomPoint,
        StageArg::Centered => Stage::Centered {
            random_points: cmd.random_points,
        },
    };
    let records = prompt_dataset(&mask, cmd.side, stage, cmd.seed)?;
    write_records(&records, create(&cmd.out)?)?;
    eprintln!("{} records", records.len());
    Ok(())
}

fn serve_cmd(cmd: ServeCmd) -> Result<()> {
    let backend = cmd.backend.connect()?;
    match &cmd.listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr)?;
            let mut out = io::stdout();
            writeln!(out, "{}", listener.local_addr()?)?;
            out.flush()?;
            serve_tcp(backend.as_ref(), &listener, cmd.sessions)
        }
        None => {
            let stdin = io::stdin();
            serve(backend.as_ref(), stdin.lock(), BufWriter::new(io::stdout().lock()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Postprocess(c) => postprocess_cmd(c),
        Command::Plan(c) => plan_cmd(c),
        Command::Run(c) => run_cmd(c),
        Command::Replay(c) => replay_cmd(c),
        Command::Eval(c) => eval_cmd(c),
        Command::Compare(c) => compare_cmd(c),
        Command::Synth(c) => synth_cmd(c),
        Command::Dataset(c) => dataset_cmd(c),
        Command::Serve(c) => serve_cmd(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("slideprompt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
