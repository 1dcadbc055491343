use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "basicmip", version, about = "Metaphor detection with basic-meaning contrast", arg_required_else_help = true)]
pub struct Cli {
    /// Relative `--out` directories are placed under this root.
    #[arg(long, global = true, env = "BASICMIP_OUTPUT_ROOT")]
    pub output_root: Option<PathBuf>,

    /// Persistent basic-embedding cache for the analysis commands.
    #[arg(long, global = true, env = "BASICMIP_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a corpus file into the normalized `<split>.jsonl` layout.
    Ingest(IngestArgs),
    /// Build the literal-pool index from the train split of a data directory.
    BuildIndex(BuildIndexArgs),
    /// Fine-tune encoder and head, keeping the best dev epoch.
    Train(TrainArgs),
    /// Train once per seed and collect the run records.
    SeedSuite(SeedSuiteArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Has-literal / no-literal breakdown of one split.
    Breakdown(BreakdownArgs),
    /// Cosine similarity of contextual vs. basic and vs. decontextualized vectors.
    Contrast(EvalArgs),
    /// Paired two-tailed t-test on the test F1 of two seed suites.
    Ttest(TtestArgs),
    /// Instances the full model gets right and the ablated model gets wrong.
    Casestudy(CasestudyArgs),
    /// Two-dimensional PCA coordinates of sense vectors for chosen targets.
    PcaExport(PcaArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Format {
    VuaSharedTask,
    NormalizedJsonl,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KeyArg {
    Surface,
    Lemma,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Toy,
    Pretrained,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_enum)]
    pub format: Format,
    #[arg(long)]
    pub input: PathBuf,
    /// Target-id list for the shared-task format.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Split assigned to shared-task rows.
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KeyArgs {
    #[arg(long, value_enum, default_value = "surface")]
    pub key: KeyArg,
    /// Two-column `word,lemma` CSV for `--key lemma`.
    #[arg(long)]
    pub lemma_table: Option<PathBuf>,
    /// Append the POS tag to each key.
    #[arg(long)]
    pub key_pos: bool,
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    /// Directory holding `train.jsonl` (and optionally dev/test).
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub key: KeyArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flat TOML file mirroring the training config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ablate_bmip: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub encoder_mode: Option<ModeArg>,
    /// Directory with `config.json`, `tokenizer.json` and `model.safetensors`.
    #[arg(long)]
    pub pretrained_path: Option<PathBuf>,
    /// Any config key, e.g. `--set lr_head=0.01`. Values parse as TOML.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SeedSuiteArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Seeds run are `seed .. seed + n_seeds`.
    #[arg(long, default_value_t = 10)]
    pub n_seeds: usize,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct BreakdownArgs {
    /// Without a checkpoint only bucket sizes are reported.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Key policy when no checkpoint is given.
    #[command(flatten)]
    pub key: KeyArgs,
    /// Agreement reference annotated in the table when reached.
    #[arg(long)]
    pub iaa: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TtestArgs {
    /// `runs.json` of the first suite.
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CasestudyArgs {
    #[arg(long)]
    pub full: PathBuf,
    #[arg(long)]
    pub ablated: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Basic examples shown per case.
    #[arg(long, default_value_t = 3)]
    pub examples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Target words to project, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub words: Vec<String>,
}
