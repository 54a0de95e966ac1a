use std::fs;
use std::io::Write;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use thiserror::Error;

use sentrybus::bench::{
    latency_publisher, latency_responder, throughput_publisher, throughput_responder, BenchConfig,
    BenchError,
};
use sentrybus::crypto::{Drbg, Suite};
use sentrybus::handshake::FsMode;
use sentrybus::identity::{
    read_pem_file, write_pem_file, Certificate, CertificateAuthority, IdentityError,
    ParticipantIdentity, PemKind,
};
use sentrybus::pubsub::{Participant, ParticipantConfig, PubsubError, SecurityProfile, TunnelKeys};
use sentrybus::report::{
    aggregate, emit_csv, ratio_vs_none, read_records, to_table, write_records, ReportError,
};

const CA_CERT_FILE: &str = "ca.cert";
const CA_KEY_FILE: &str = "ca.key";
const IDENTITY_FILE: &str = "identity.pem";
const CERT_FILE: &str = "cert.pem";

#[derive(Parser)]
#[command(
    name = "sentrybus",
    version,
    about = "Secure publish/subscribe over UDP with a latency and throughput bench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a certificate authority or an identity issued by one.
    #[command(subcommand)]
    Keygen(Keygen),
    /// Run a bench responder until interrupted.
    Serve(ServeArgs),
    /// Run a bench publisher against a responder and write raw records.
    Bench(BenchArgs),
    /// Aggregate raw records into summary rows.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum Keygen {
    /// Self-signed root: writes ca.cert and ca.key.
    Ca {
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Identity signed by a root: writes identity.pem and cert.pem.
    Identity {
        /// Directory holding ca.cert and ca.key.
        #[arg(long)]
        ca: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long, value_parser = parse_suite)]
        suite: Suite,
        /// Certify a long-term key-agreement value (static mode, no forward secrecy).
        #[arg(long)]
        static_dh: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileKind {
    None,
    Crypto,
    Tunnel,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long, value_enum)]
    profile: ProfileKind,
    /// Directory holding identity.pem (crypto profile).
    #[arg(long)]
    identity: Option<PathBuf>,
    /// Trusted root certificate file (crypto profile).
    #[arg(long)]
    root: Option<PathBuf>,
    /// File with the 48-byte tunnel key in hex (tunnel profile).
    #[arg(long)]
    psk: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Responder {
    Echo,
    Counter,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(value_enum)]
    kind: Responder,
    #[arg(long)]
    bind: String,
    #[command(flatten)]
    profile: ProfileArgs,
    #[arg(long)]
    topic1: String,
    #[arg(long)]
    topic2: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchKind {
    Latency,
    Throughput,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(value_enum)]
    kind: BenchKind,
    #[arg(long)]
    peer: String,
    #[arg(long, default_value = "0.0.0.0:0")]
    bind: String,
    #[command(flatten)]
    profile: ProfileArgs,
    /// Payload sizes in bytes.
    #[arg(long, value_delimiter = ',', default_value = "16,1024,12000")]
    sizes: Vec<usize>,
    /// Repetitions per payload size.
    #[arg(long)]
    reps: usize,
    /// Packets per throughput test.
    #[arg(long, default_value_t = 100)]
    packets: usize,
    #[arg(long, default_value_t = 1000)]
    cooloff_us: u64,
    /// Wait for one latency echo.
    #[arg(long, default_value_t = 250)]
    timeout_ms: u64,
    #[arg(long, default_value = "topic1")]
    topic1: String,
    #[arg(long, default_value = "topic2")]
    topic2: String,
    /// CSV file for the raw records.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Table,
}

#[derive(Args)]
struct ReportArgs {
    /// Raw record files written by `bench`.
    #[arg(long = "in", value_delimiter = ',', required = true)]
    inputs: Vec<PathBuf>,
    /// Add each throughput row's ratio against the none profile.
    #[arg(long)]
    ratio: bool,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output file, or `-` for stdout.
    #[arg(long)]
    out: PathBuf,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse()
        .map_err(|_| format!("expected modp2048 or p256, got {s:?}"))
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Peer(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Peer(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<IdentityError> for CliError {
    fn from(e: IdentityError) -> Self {
        match e {
            IdentityError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<PubsubError> for CliError {
    fn from(e: PubsubError) -> Self {
        match e {
            PubsubError::BindFailure(_) | PubsubError::Io(_) => CliError::Io(e.to_string()),
            PubsubError::HandshakeFailed(_)
            | PubsubError::Timeout
            | PubsubError::NotConnected
            | PubsubError::CounterExhausted => CliError::Peer(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Pubsub(p) => p.into(),
            BenchError::PeerUnavailable(_) | BenchError::ResultTimeout { .. } => {
                CliError::Peer(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

/// Names the file an identity or report error came from.
fn in_file(what: &str, path: &Path, e: impl Into<CliError>) -> CliError {
    match e.into() {
        CliError::Io(msg) => CliError::Io(format!("{what} {}: {msg}", path.display())),
        CliError::Config(msg) => CliError::Config(format!("{what} {}: {msg}", path.display())),
        other => other,
    }
}

fn keygen(cmd: Keygen) -> Result<(), CliError> {
    let mut drbg = Drbg::from_os_entropy(b"sentrybus keygen");
    match cmd {
        Keygen::Ca { name, out } => {
            let ca = CertificateAuthority::create(&name, &mut drbg)?;
            fs::create_dir_all(&out)?;
            write_pem_file(
                &out.join(CA_CERT_FILE),
                PemKind::Cert,
                &ca.certificate().encode(),
            )?;
            write_pem_file(&out.join(CA_KEY_FILE), PemKind::Identity, &ca.encode())?;
            println!(
                "wrote {} and {}",
                out.join(CA_CERT_FILE).display(),
                out.join(CA_KEY_FILE).display()
            );
        }
        Keygen::Identity {
            ca,
            name,
            suite,
            static_dh,
            out,
        } => {
            let key_path = ca.join(CA_KEY_FILE);
            let ca = read_pem_file(&key_path, PemKind::Identity)
                .and_then(|der| CertificateAuthority::decode(&der))
                .map_err(|e| in_file("CA key", &key_path, e))?;
            let identity = ca.issue_identity(&name, suite, static_dh, &mut drbg)?;
            fs::create_dir_all(&out)?;
            write_pem_file(
                &out.join(IDENTITY_FILE),
                PemKind::Identity,
                &identity.encode(),
            )?;
            write_pem_file(
                &out.join(CERT_FILE),
                PemKind::Cert,
                &identity.certificate().encode(),
            )?;
            println!(
                "wrote {} and {}",
                out.join(IDENTITY_FILE).display(),
                out.join(CERT_FILE).display()
            );
        }
    }
    Ok(())
}

/// Builds a participant configuration. Crypto runs in static mode exactly
/// when the identity carries a long-term key-agreement value.
fn participant_config(
    args: &ProfileArgs,
    default_name: &str,
) -> Result<ParticipantConfig, CliError> {
    match args.profile {
        ProfileKind::None => {
            return Ok(ParticipantConfig::new(default_name, SecurityProfile::None))
        }
        ProfileKind::Tunnel => {
            let path = args
                .psk
                .as_ref()
                .ok_or_else(|| CliError::Config("the tunnel profile needs --psk".into()))?;
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("PSK {}: {e}", path.display())))?;
            let keys = hex::decode(text.trim())
                .ok()
                .and_then(|b| TunnelKeys::from_bytes(&b))
                .ok_or_else(|| {
                    CliError::Config(format!(
                        "PSK {} must hold {} bytes in hex",
                        path.display(),
                        TunnelKeys::ENCODED_LEN
                    ))
                })?;
            return Ok(ParticipantConfig::new(
                default_name,
                SecurityProfile::Tunnel(keys),
            ));
        }
        ProfileKind::Crypto => {}
    }
    let (Some(dir), Some(root_path)) = (&args.identity, &args.root) else {
        return Err(CliError::Config(
            "the crypto profile needs --identity and --root".into(),
        ));
    };
    let id_path = dir.join(IDENTITY_FILE);
    let identity = read_pem_file(&id_path, PemKind::Identity)
        .and_then(|der| ParticipantIdentity::decode(&der))
        .map_err(|e| in_file("identity", &id_path, e))?;
    let root = read_pem_file(root_path, PemKind::Cert)
        .and_then(|der| Certificate::decode(&der))
        .map_err(|e| in_file("root certificate", root_path, e))?;
    let fs_mode = if identity.agreement().is_some() {
        FsMode::Static
    } else {
        FsMode::Ephemeral
    };
    let profile = SecurityProfile::Crypto {
        suite: identity.suite(),
        fs_mode,
    };
    let name = identity.name().to_owned();
    Ok(ParticipantConfig::new(&name, profile).with_identity(identity, root))
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    let config = participant_config(&args.profile, "responder")?;
    let p = Participant::bind(config, args.bind.as_str())?;
    match args.kind {
        Responder::Echo => latency_responder(&p, &args.topic1, &args.topic2)?,
        Responder::Counter => {
            throughput_responder(&p, &args.topic1, &args.topic2)?;
        }
    }
    p.start();
    println!("listening on {} ({})", p.local_addr(), p.profile());
    std::io::stdout().flush()?;
    loop {
        std::thread::park();
    }
}

fn resolve(addr: &str) -> Result<SocketAddr, CliError> {
    addr.to_socket_addrs()
        .ok()
        .and_then(|mut it| it.next())
        .ok_or_else(|| CliError::Config(format!("cannot resolve {addr:?}")))
}

fn bench(args: BenchArgs) -> Result<(), CliError> {
    let cfg = BenchConfig {
        payload_sizes: args.sizes.clone(),
        latency_repetitions: args.reps,
        packets_per_test: args.packets,
        throughput_repetitions: args.reps,
        cooloff: Duration::from_micros(args.cooloff_us),
        round_trip_timeout: Duration::from_millis(args.timeout_ms),
        topic1: args.topic1.clone(),
        topic2: args.topic2.clone(),
        ..BenchConfig::default()
    };
    cfg.validate()?;
    let peer = resolve(&args.peer)?;
    let config = participant_config(&args.profile, "publisher")?;
    let p = Participant::bind(config, args.bind.as_str())?;
    p.start();
    let name = p.connect_any(peer)?;
    info!("connected to {name} at {peer}");
    let records = match args.kind {
        BenchKind::Latency => latency_publisher(&cfg, &p)?,
        BenchKind::Throughput => throughput_publisher(&cfg, &p)?,
    };
    let file = fs::File::create(&args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    write_records(&records, file)?;
    println!("wrote {} records to {}", records.len(), args.out.display());
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let mut records = Vec::new();
    for path in &args.inputs {
        let file =
            fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        records.extend(read_records(file).map_err(|e| in_file("records", path, e))?);
    }
    let mut rows = aggregate(&records)?;
    if args.ratio {
        ratio_vs_none(&mut rows)?;
    }
    let to_stdout = args.out.as_os_str() == "-";
    match args.format {
        Format::Csv if to_stdout => sentrybus::report::write_csv(&rows, std::io::stdout().lock())?,
        Format::Csv => emit_csv(&rows, &args.out)?,
        Format::Table if to_stdout => print!("{}", to_table(&rows)),
        Format::Table => fs::write(&args.out, to_table(&rows))
            .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SENTRYBUS_LOG", "error"))
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Keygen(cmd) => keygen(cmd),
        Command::Serve(args) => serve(args),
        Command::Bench(args) => bench(args),
        Command::Report(args) => report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sentrybus: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
