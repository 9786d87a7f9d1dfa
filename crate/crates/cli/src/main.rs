//! Operator CLI: key and card management, scenario execution, discovery
//! sweeps, ledger inspection, and envelope verification.
//!
//! Exit codes: 0 success, 2 validation failure, 3 scenario expectation
//! failure, 4 I/O error or corrupt state. Machine-readable errors go to
//! stderr prefixed `error:`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use acp_core::doc::{self, Decimal};
use acp_core::envelope::read_frame;
use acp_core::identity::KeyPair;
use acp_core::semantic::{validate_card, AgentCard, ConstraintSet};
use acp_sim::persist;
use acp_sim::scenario::Scenario;
use acp_sim::sweep;

#[derive(Parser)]
#[command(
    name = "acp",
    version,
    about = "Agent protocol toolbox: keys, cards, deterministic network simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Derive a key pair from a seed and write it to a key file
    Keygen(KeygenArgs),
    /// Create, inspect, and validate agent card files
    #[command(subcommand)]
    Card(CardCommand),
    /// Run scenarios through the simulated network
    #[command(subcommand)]
    Sim(SimCommand),
    /// Inspect a reputation ledger in a state directory
    #[command(subcommand)]
    Ledger(LedgerCommand),
    /// Verify a framed envelope file against the sender's card
    VerifyEnvelope(VerifyEnvelopeArgs),
}

#[derive(Args)]
struct KeygenArgs {
    /// 32-byte seed as 64 hex characters
    #[arg(long)]
    seed: String,
    /// Key file to write (64 bytes: secret then public)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum CardCommand {
    /// Build a card file for a key
    New(CardNewArgs),
    /// Pretty-print the fields of a card file
    Show { file: PathBuf },
    /// Validate a card file; names the failing field on error
    Validate { file: PathBuf },
}

#[derive(Args)]
struct CardNewArgs {
    /// Key file written by keygen
    #[arg(long)]
    key: PathBuf,
    /// Comma-separated capability names (lowercase snake_case)
    #[arg(long)]
    capabilities: String,
    /// Card file to write
    #[arg(long)]
    out: PathBuf,
    /// Advertised latency bound in ms
    #[arg(long)]
    max_latency_ms: Option<u64>,
    /// Advertised cost bound, e.g. 0.05
    #[arg(long)]
    max_cost: Option<String>,
    /// Advertised data residency region, e.g. EU
    #[arg(long)]
    data_residency: Option<String>,
    /// Endpoint text stored on the card
    #[arg(long, default_value = "sim://local")]
    endpoint: String,
    /// Trust score snapshot in [0, 1]
    #[arg(long, default_value = "0.5")]
    trust_score: String,
    /// Interaction count backing the trust score
    #[arg(long, default_value_t = 0)]
    interaction_count: u64,
}

#[derive(Subcommand)]
enum SimCommand {
    /// Execute one scenario; exit 3 if its declared expectations fail
    Run(SimRunArgs),
    /// Run the discovery scaling grid and emit its CSV
    Sweep(SimSweepArgs),
}

#[derive(Args)]
struct SimRunArgs {
    /// Scenario file (canonical document, whitespace allowed)
    #[arg(long)]
    scenario: PathBuf,
    /// Run seed in hex
    #[arg(long, default_value = "0")]
    seed: String,
    /// Directory for metrics CSV, reports, transcripts, and state
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimSweepArgs {
    /// Optional scenario template for the link model and horizon
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Comma-separated agent counts, e.g. 16,64,256,1024
    #[arg(long, default_value = "16,64,256")]
    agents: String,
    /// Seeds in hex: comma-separated values and inclusive a..b ranges
    #[arg(long, default_value = "1")]
    seeds: String,
    /// Capability lookups measured per run
    #[arg(long, default_value_t = 100)]
    lookups: u64,
    /// CSV output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum LedgerCommand {
    /// Print trust scores derived from the ledger
    Show(LedgerShowArgs),
}

#[derive(Args)]
struct LedgerShowArgs {
    /// State directory holding ledger.log
    #[arg(long)]
    state: PathBuf,
    /// Restrict the output to one DID
    #[arg(long)]
    did: Option<String>,
}

#[derive(Args)]
struct VerifyEnvelopeArgs {
    /// Length-prefixed envelope file
    file: PathBuf,
    /// Card file identifying the expected sender
    #[arg(long)]
    card: PathBuf,
}

/// Error carrying the documented exit code.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn validation(message: impl Into<String>) -> CliError {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    fn expectation(message: impl Into<String>) -> CliError {
        CliError {
            code: 3,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> CliError {
        CliError {
            code: 4,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        CliCommand::Keygen(args) => keygen(args),
        CliCommand::Card(CardCommand::New(args)) => card_new(args),
        CliCommand::Card(CardCommand::Show { file }) => card_show(&file),
        CliCommand::Card(CardCommand::Validate { file }) => card_validate(&file),
        CliCommand::Sim(SimCommand::Run(args)) => sim_run(args),
        CliCommand::Sim(SimCommand::Sweep(args)) => sim_sweep(args),
        CliCommand::Ledger(LedgerCommand::Show(args)) => ledger_show(args),
        CliCommand::VerifyEnvelope(args) => verify_envelope(args),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::io(format!("{}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn parse_hex_seed32(text: &str) -> Result<[u8; 32], CliError> {
    hex::decode(text)
        .ok()
        .and_then(|b| <[u8; 32]>::try_from(b).ok())
        .ok_or_else(|| CliError::validation("seed must be 64 hex characters (32 bytes)"))
}

fn keygen(args: KeygenArgs) -> Result<(), CliError> {
    let seed = parse_hex_seed32(&args.seed)?;
    let kp = KeyPair::from_seed(&seed).map_err(|e| CliError::validation(e.to_string()))?;
    write_file(&args.out, &kp.to_file_bytes())?;
    restrict_permissions(&args.out)?;
    println!("{}", kp.did());
    Ok(())
}

/// Key files are secrets: owner read/write only.
#[cfg(unix)]
fn restrict_permissions(path: &Path) -> Result<(), CliError> {
    use std::os::unix::fs::PermissionsExt;
    std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o600))
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

#[cfg(not(unix))]
fn restrict_permissions(_path: &Path) -> Result<(), CliError> {
    Ok(())
}

fn load_keypair(path: &Path) -> Result<KeyPair, CliError> {
    let bytes = read_file(path)?;
    KeyPair::from_file_bytes(&bytes).map_err(|e| CliError::validation(e.to_string()))
}

fn card_new(args: CardNewArgs) -> Result<(), CliError> {
    let kp = load_keypair(&args.key)?;
    let capabilities: Vec<String> = args.capabilities.split(',').map(str::to_string).collect();
    let max_cost = match &args.max_cost {
        None => None,
        Some(text) => Some(
            Decimal::parse(text)
                .map_err(|_| CliError::validation(format!("bad decimal `{text}`")))?,
        ),
    };
    let trust_score = Decimal::parse(&args.trust_score)
        .map_err(|_| CliError::validation(format!("bad decimal `{}`", args.trust_score)))?;
    let card = AgentCard {
        identity: kp.did(),
        public_key: kp.public_key(),
        capabilities,
        constraints: ConstraintSet {
            max_latency_ms: args.max_latency_ms,
            max_cost,
            data_residency: args.data_residency.clone(),
        },
        trust_score,
        interaction_count: args.interaction_count,
        interface: args.endpoint.clone(),
    };
    // reject anything that would not validate on read-back
    validate_card(&card.to_doc()).map_err(|e| CliError::validation(e.to_string()))?;
    write_file(&args.out, &card.encode())?;
    println!("{}", kp.did());
    Ok(())
}

fn load_card(path: &Path) -> Result<AgentCard, CliError> {
    let bytes = read_file(path)?;
    let value = doc::decode_lenient(&bytes)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    validate_card(&value).map_err(|e| CliError::validation(e.to_string()))
}

fn card_show(path: &Path) -> Result<(), CliError> {
    let card = load_card(path)?;
    println!("identity          {}", card.identity);
    println!("capabilities      {}", card.capabilities.join(", "));
    if let Some(ms) = card.constraints.max_latency_ms {
        println!("max_latency_ms    {ms}");
    }
    if let Some(cost) = card.constraints.max_cost {
        println!("max_cost          {cost}");
    }
    if let Some(region) = &card.constraints.data_residency {
        println!("data_residency    {region}");
    }
    println!(
        "trust_score       {} (based on {} interactions)",
        card.trust_score, card.interaction_count
    );
    println!("interface         {}", card.interface);
    Ok(())
}

fn card_validate(path: &Path) -> Result<(), CliError> {
    let card = load_card(path)?;
    println!("ok: {}", card.identity);
    Ok(())
}

fn parse_hex_u64(text: &str) -> Result<u64, CliError> {
    u64::from_str_radix(text.trim_start_matches("0x"), 16)
        .map_err(|_| CliError::validation(format!("`{text}` is not a hex integer")))
}

fn sim_run(args: SimRunArgs) -> Result<(), CliError> {
    let bytes = read_file(&args.scenario)?;
    let scenario = Scenario::parse(&bytes).map_err(|e| CliError::validation(e.to_string()))?;
    let seed = parse_hex_u64(&args.seed)?;
    let output = acp_sim::run(&scenario, seed).map_err(|e| CliError::validation(e.to_string()))?;

    print!("{}", output.metrics_csv());
    println!("trace_hash {}", hex::encode(output.trace_hash));
    for report in &output.reports {
        println!(
            "plan {} {} ({} ms)",
            report.get_text("label").unwrap_or("?"),
            report.get_text("status").unwrap_or("?"),
            report.get_u64("elapsed_ms").unwrap_or(0),
        );
    }

    if let Some(dir) = &args.out {
        write_run_output(dir, &output)?;
    }

    if !output.expectations_met() {
        for failure in &output.expectation_failures {
            eprintln!("error: expectation failed: {failure}");
        }
        return Err(CliError::expectation("scenario expectations not met"));
    }
    Ok(())
}

fn write_run_output(dir: &Path, output: &acp_sim::RunOutput) -> Result<(), CliError> {
    write_file(&dir.join("metrics.csv"), output.metrics_csv().as_bytes())?;
    write_file(&dir.join("summary.json"), &doc::encode(&output.summary))?;
    for report in &output.reports {
        let label = report.get_text("label").unwrap_or("plan");
        write_file(
            &dir.join("reports").join(format!("{label}.json")),
            &doc::encode(report),
        )?;
    }
    for transcript in &output.transcripts {
        let sid = transcript.get_text("session_id").unwrap_or("session");
        let role = transcript.get_text("role").unwrap_or("side");
        write_file(
            &dir.join("transcripts").join(format!("{sid}-{role}.json")),
            &doc::encode(transcript),
        )?;
    }
    if let Some(ledger) = &output.ledger {
        persist::save_state(&dir.join("state"), ledger, &output.registry_cards)
            .map_err(|e| CliError::io(e.to_string()))?;
    }
    Ok(())
}

fn parse_counts(text: &str) -> Result<Vec<u64>, CliError> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<u64>()
                .map_err(|_| CliError::validation(format!("bad agent count `{part}`")))
        })
        .collect()
}

/// Seeds are hex; `a..b` is the inclusive range from a to b.
fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let mut seeds = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        match part.split_once("..") {
            Some((lo, hi)) => {
                let lo = parse_hex_u64(lo)?;
                let hi = parse_hex_u64(hi)?;
                if hi < lo {
                    return Err(CliError::validation(format!("empty seed range `{part}`")));
                }
                seeds.extend(lo..=hi);
            }
            None => seeds.push(parse_hex_u64(part)?),
        }
    }
    Ok(seeds)
}

fn sim_sweep(args: SimSweepArgs) -> Result<(), CliError> {
    let template = match &args.scenario {
        Some(path) => {
            let bytes = read_file(path)?;
            Scenario::parse(&bytes).map_err(|e| CliError::validation(e.to_string()))?
        }
        None => sweep::default_template(),
    };
    let counts = parse_counts(&args.agents)?;
    if counts.iter().any(|&n| n < 2) {
        return Err(CliError::validation("agent counts must be at least 2"));
    }
    let seeds = parse_seeds(&args.seeds)?;
    let rows = sweep::sweep(&template, &counts, &seeds, args.lookups)
        .map_err(|e| CliError::validation(e.to_string()))?;
    let csv = sweep::sweep_csv(&rows);
    match &args.out {
        Some(path) => write_file(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn ledger_show(args: LedgerShowArgs) -> Result<(), CliError> {
    let (ledger, _cards) = persist::load_state(&args.state).map_err(|e| match e {
        persist::PersistError::Io(e) => CliError::io(e.to_string()),
        persist::PersistError::CorruptState(msg) => CliError::io(format!("corrupt state: {msg}")),
    })?;
    if !ledger.verify_chain() {
        return Err(CliError::io("corrupt state: ledger chain mismatch"));
    }
    if let Some(did_text) = &args.did {
        let did = acp_core::identity::Did::parse(did_text)
            .map_err(|e| CliError::validation(e.to_string()))?;
        let (trust, count) = ledger.trust(&did);
        println!("{did} trust {trust} interactions {count}");
        return Ok(());
    }
    let mut subjects: Vec<acp_core::identity::Did> =
        ledger.entries().iter().map(|e| e.ratee).collect();
    subjects.sort();
    subjects.dedup();
    println!("entries {}", ledger.len());
    println!("head {}", hex::encode(ledger.head()));
    for did in subjects {
        let (trust, count) = ledger.trust(&did);
        println!("{did} trust {trust} interactions {count}");
    }
    Ok(())
}

fn verify_envelope(args: VerifyEnvelopeArgs) -> Result<(), CliError> {
    let card = load_card(&args.card)?;
    let bytes = read_file(&args.file)?;
    let (envelope, used) = read_frame(&bytes).map_err(|e| CliError::validation(e.to_string()))?;
    if used != bytes.len() {
        return Err(CliError::validation("trailing bytes after the frame"));
    }
    if envelope.sender != card.identity {
        return Err(CliError::validation(format!(
            "envelope sender {} is not the card identity {}",
            envelope.sender, card.identity
        )));
    }
    acp_core::envelope::open_envelope(&envelope, &card.public_key)
        .map_err(|e| CliError::validation(e.to_string()))?;
    println!(
        "ok: {} from {} seq {} at {}",
        envelope.msg_type, envelope.sender, envelope.sequence, envelope.sent_at
    );
    Ok(())
}
