//! Participant command line: join a project, run it on a local dataset,
//! check its status. Also carries small account and project helpers.

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};

use maskfed_core::algorithms::variance;
use maskfed_core::masking::RngHandle;
use maskfed_core::{load_dataset_csv, RngKind};
use maskfed_service::api::{
    CreateProject, Credentials, JoinRequest, ProjectCreated, ProjectInfo, ProjectStatus, SessionToken, TokenList,
};
use maskfed_service::client::{join_flow, ClientConfig, ClientError, ClientRuntime, ClientSession, RetryPolicy};
use maskfed_service::{HttpTransport, Request, Response, Transport};

#[derive(Debug, Parser)]
#[command(about = "Participant client for masked federated aggregation")]
struct Cli {
    /// TOML file with `server`, `compensator`, `seed` and `rng` defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where the joined session is stored.
    #[arg(long, global = true, default_value = ".maskfed-session.json")]
    session: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create an account on the server.
    Signup {
        #[arg(long)]
        server: Option<String>,
        #[arg(long)]
        username: String,
        #[arg(long, env = "MASKFED_PASSWORD", hide_env_values = true)]
        password: Option<String>,
    },
    /// Create a project as coordinator and print its participant tokens.
    CreateProject {
        #[arg(long)]
        server: Option<String>,
        #[arg(long)]
        username: String,
        #[arg(long, env = "MASKFED_PASSWORD", hide_env_values = true)]
        password: Option<String>,
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "")]
        description: String,
        #[arg(long, default_value = variance::NAME)]
        algorithm: String,
        #[arg(long)]
        participants: u32,
    },
    /// Join a project with a participant token.
    Join {
        #[arg(long)]
        server: Option<String>,
        #[arg(long)]
        compensator: Option<String>,
        #[arg(long)]
        project: String,
        #[arg(long)]
        username: String,
        #[arg(long)]
        token: String,
        #[arg(long, env = "MASKFED_PASSWORD", hide_env_values = true)]
        password: Option<String>,
        /// Consent without the interactive question.
        #[arg(long)]
        yes: bool,
    },
    /// Take part in training with a local CSV dataset.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        /// Seed for the deterministic noise generator.
        #[arg(long)]
        seed: Option<u64>,
        /// Draw noise from the operating system.
        #[arg(long, conflicts_with = "seed")]
        os_rng: bool,
        /// Debug mode: send parameters unmasked.
        #[arg(long)]
        no_masking: bool,
        /// Milliseconds between polls while waiting.
        #[arg(long, default_value_t = 1000)]
        poll_ms: u64,
        /// Directory for the result file.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Show the project's status.
    Status,
}

fn prompt(question: &str) -> std::io::Result<String> {
    eprint!("{question}");
    std::io::stderr().flush()?;
    let mut line = String::new();
    std::io::stdin().lock().read_line(&mut line)?;
    Ok(line.trim_end_matches(['\r', '\n']).to_owned())
}

fn password(given: Option<String>) -> std::io::Result<String> {
    match given {
        Some(p) => Ok(p),
        None => prompt("password: "),
    }
}

fn pick(flag: Option<String>, fallback: Option<&String>, what: &str) -> Result<String, String> {
    flag.or_else(|| fallback.cloned()).ok_or_else(|| format!("--{what} is required (or set it in the config file)"))
}

fn expect_ok(response: Response) -> Result<Response, ClientError> {
    if response.is_success() {
        Ok(response)
    } else {
        Err(ClientError::from_response(&response))
    }
}

fn print_info(info: &ProjectInfo) {
    println!("project      {}", info.id);
    println!("name         {}", info.name);
    if !info.description.is_empty() {
        println!("description  {}", info.description);
    }
    println!("coordinator  {}", info.coordinator);
    println!("algorithm    {}", info.algorithm);
    println!("participants {}", info.participant_count);
    if info.hyperparameters.is_empty() {
        println!("hyper-parameters: none");
    } else {
        println!("hyper-parameters:");
        for (name, value) in &info.hyperparameters {
            println!("  {name} = {}", serde_json::to_string(value).unwrap_or_default());
        }
    }
}

fn login(transport: &dyn Transport, server: &str, username: &str, password: String) -> Result<String, ClientError> {
    let creds = Credentials { username: username.to_owned(), password };
    let response = expect_ok(transport.send(server, &Request::post_json("/auth/login", &creds)?)?)?;
    Ok(response.parse::<SessionToken>()?.session)
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let config = match &cli.config {
        Some(path) => ClientConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => ClientConfig::default(),
    };
    let transport: Arc<dyn Transport> = Arc::new(HttpTransport::default());
    match cli.command {
        Command::Signup { server, username, password: pw } => {
            let server = pick(server, config.server.as_ref(), "server")?;
            let creds = Credentials { username, password: password(pw)? };
            expect_ok(transport.send(&server, &Request::post_json("/auth/signup", &creds)?)?)?;
            println!("account {} created", creds.username);
        }
        Command::CreateProject { server, username, password: pw, name, description, algorithm, participants } => {
            let server = pick(server, config.server.as_ref(), "server")?;
            let session = login(&*transport, &server, &username, password(pw)?)?;
            let draft = CreateProject {
                name,
                description,
                tool: "maskfed".into(),
                algorithm,
                hyperparameters: Default::default(),
                participant_count: participants,
                modulus: None,
                noise_variance: None,
            };
            let bearer = format!("Bearer {session}");
            let request = Request::post_json("/projects", &draft)?.with_header("authorization", &bearer);
            let created: ProjectCreated = expect_ok(transport.send(&server, &request)?)?.parse()?;
            let request = Request::post(format!("/projects/{}/tokens", created.project_id))
                .with_query("count", participants.to_string())
                .with_header("authorization", &bearer);
            let tokens: TokenList = expect_ok(transport.send(&server, &request)?)?.parse()?;
            println!("project {}", created.project_id);
            for token in tokens.tokens {
                println!("token {token}");
            }
        }
        Command::Join { server, compensator, project, username, token, password: pw, yes } => {
            let server = pick(server, config.server.as_ref(), "server")?;
            let compensator = pick(compensator, config.compensator.as_ref(), "compensator")?;
            let join = JoinRequest { username, password: password(pw)?, token };
            let mut consent = |info: &ProjectInfo| {
                print_info(info);
                yes || prompt("Take part in this project? [y/N] ")
                    .map(|a| matches!(a.trim(), "y" | "Y" | "yes"))
                    .unwrap_or(false)
            };
            match join_flow(&*transport, RetryPolicy::default(), &server, &compensator, &project, &join, &mut consent) {
                Ok(session) => {
                    session.save(&cli.session)?;
                    println!("joined; session saved to {}", cli.session.display());
                }
                Err(ClientError::UserDeclined) => println!("declined; no data was read or sent"),
                Err(e) => return Err(e.into()),
            }
        }
        Command::Run { dataset, seed, os_rng, no_masking, poll_ms, out } => {
            let mut session = ClientSession::load(&cli.session)?;
            let data = load_dataset_csv(&dataset)?;
            session.dataset_path = Some(dataset);
            let rng = match (seed.or(config.seed), os_rng || config.rng == Some(RngKind::OsSecure)) {
                (_, true) | (None, false) => RngHandle::os_secure(),
                (Some(seed), false) => RngHandle::deterministic(seed),
            };
            let mut runtime = ClientRuntime::new(session, transport, data, rng)?
                .with_masking(!no_masking)
                .with_result_dir(out);
            let status = runtime.run(Duration::from_millis(poll_ms))?;
            runtime.session().save(&cli.session)?;
            match status {
                ProjectStatus::Done => {
                    if let Some(path) = runtime.result_path() {
                        println!("finished; result in {}", path.display());
                    }
                }
                other => return Err(format!("project ended as {other:?}").into()),
            }
        }
        Command::Status => {
            let session = ClientSession::load(&cli.session)?;
            let request = session.authorize(Request::get(format!("/projects/{}/status", session.project_id)));
            let response = expect_ok(transport.send(&session.server_url, &request)?)?;
            let report: serde_json::Value = response.parse()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
