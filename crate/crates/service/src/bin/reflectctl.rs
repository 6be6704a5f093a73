//! Operator command line for a reflection study.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use clap::{Parser, Subcommand, ValueEnum};
use reflect_core::analysis::{analyze, parse_survey_csv, SurveyRow};
use reflect_core::llm::{Completion, Gateway, RetryPolicy};
use reflect_core::model::{ManualClock, NotificationChannel, PreferredWindow, StudyCondition, SystemClock};
use reflect_service::admin::{self, AdminError, NewParticipant};
use reflect_service::config::{CapMode, StudyConfig};
use reflect_service::export::{export, ExportFormat};
use reflect_service::notify::LogDispatcher;
use reflect_service::provider::HttpTransport;
use reflect_service::service::Service;
use reflect_service::simulate::{self, SimulationOptions};
use reflect_service::store::{Store, StoreOptions};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "reflectctl", version, about = "Run a between-meeting reflection study")]
struct Cli {
    /// Study directory holding study.json and the store segments.
    #[arg(long, global = true, env = "REFLECT_STORE", default_value = "study-data")]
    store: PathBuf,
    /// Study config file (TOML or JSON) used by `study create`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Text provider: the offline stub, or an HTTP endpoint configured via
    /// REFLECT_LLM_URL / REFLECT_LLM_API_KEY / REFLECT_LLM_MODEL.
    #[arg(long, global = true, env = "REFLECT_LLM_PROVIDER", value_enum, default_value_t = Provider::Stub)]
    provider: Provider,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Provider {
    Stub,
    Http,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create the study or assign conditions.
    #[command(subcommand)]
    Study(StudyCmd),
    /// Register teams.
    #[command(subcommand)]
    Team(TeamCmd),
    /// Register participants.
    #[command(subcommand)]
    Participant(ParticipantCmd),
    /// Process schedule events due at an instant; repeating it is a no-op.
    Tick {
        #[arg(long)]
        now: DateTime<Utc>,
    },
    /// Run a seeded study against the stub provider and write its export.
    Simulate {
        #[arg(long, default_value_t = 5)]
        days: u32,
        #[arg(long, default_value_t = 5)]
        teams_per_condition: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write all study records as JSONL or CSV.
    Export {
        #[arg(long, default_value = "jsonl")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the subscale and workload report.
    Analyze {
        /// Survey CSV (q1..q30, tlx1..tlx6, condition); defaults to the
        /// survey rows in the store.
        #[arg(long)]
        survey: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Serve the participant API and run scheduler ticks.
    Serve {
        #[arg(long, env = "REFLECT_PORT", default_value_t = 8080)]
        port: u16,
        /// Directory of static files to serve next to the API.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        tick_seconds: u64,
    },
}

#[derive(Debug, Subcommand)]
enum StudyCmd {
    Create {
        #[arg(long)]
        study_id: Option<String>,
        #[arg(long)]
        interval_days: Option<u32>,
        #[arg(long)]
        meeting_count: Option<u32>,
        #[arg(long)]
        start_date: Option<NaiveDate>,
        /// UTC offset such as +09:00.
        #[arg(long, env = "REFLECT_TIMEZONE")]
        timezone: Option<String>,
        #[arg(long, env = "REFLECT_WORD_CAP")]
        word_cap: Option<usize>,
        #[arg(long)]
        warn_only: bool,
    },
    /// Assign conditions to all teams, balanced and seeded.
    Assign {
        #[arg(long, required = true)]
        random_assign: bool,
    },
}

#[derive(Debug, Subcommand)]
enum TeamCmd {
    Add {
        #[arg(long)]
        team_id: String,
        #[arg(long, value_parser = parse_condition)]
        condition: StudyCondition,
        #[arg(long, default_value = "")]
        task_name: String,
    },
}

#[derive(Debug, Subcommand)]
enum ParticipantCmd {
    Add {
        #[arg(long)]
        participant_id: String,
        #[arg(long)]
        team_id: String,
        #[arg(long)]
        name: String,
        #[arg(long, env = "REFLECT_ACCESS_CODE")]
        access_code: Option<String>,
        #[arg(long, default_value = "")]
        responsibilities: String,
        #[arg(long, value_parser = parse_window, default_value = "morning")]
        window: PreferredWindow,
        #[arg(long, value_parser = parse_channel, default_value = "in_app")]
        channel: NotificationChannel,
    },
}

fn parse_condition(s: &str) -> Result<StudyCondition, String> {
    s.parse().map_err(|e: reflect_core::model::ParseEnumError| e.to_string())
}

fn parse_window(s: &str) -> Result<PreferredWindow, String> {
    s.parse().map_err(|e: reflect_core::model::ParseEnumError| e.to_string())
}

fn parse_channel(s: &str) -> Result<NotificationChannel, String> {
    s.parse().map_err(|e: reflect_core::model::ParseEnumError| e.to_string())
}

#[derive(Debug)]
struct Failure {
    code: &'static str,
    message: String,
}

impl From<AdminError> for Failure {
    fn from(e: AdminError) -> Self {
        Failure {
            code: e.code(),
            message: e.to_string(),
        }
    }
}

fn fail(code: &'static str, e: impl std::fmt::Display) -> Failure {
    Failure {
        code,
        message: e.to_string(),
    }
}

fn open_store(dir: &Path) -> Result<Arc<Store>, Failure> {
    Ok(Arc::new(Store::open(dir, StoreOptions::default()).map_err(AdminError::from)?))
}

fn provider(cli: &Cli) -> Result<Arc<dyn Completion>, Failure> {
    match cli.provider {
        Provider::Stub => Ok(Arc::new(Gateway::stub(cli.seed))),
        Provider::Http => {
            let t = HttpTransport::from_env().map_err(|e| fail("provider_config", e))?;
            Ok(Arc::new(Gateway::new(Box::new(t), RetryPolicy::default())))
        }
    }
}

fn write_out(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| fail("io_error", e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Study(StudyCmd::Create {
            study_id,
            interval_days,
            meeting_count,
            start_date,
            timezone,
            word_cap,
            warn_only,
        }) => {
            let mut cfg = match &cli.config {
                Some(p) => StudyConfig::load(p).map_err(AdminError::from)?,
                None => StudyConfig::default(),
            };
            if let Some(v) = study_id {
                cfg.study_id = v.clone();
            }
            if let Some(v) = interval_days {
                cfg.interval_days = *v;
            }
            if let Some(v) = meeting_count {
                cfg.meeting_count = *v;
            }
            if let Some(v) = start_date {
                cfg.start_date = *v;
            }
            if let Some(tz) = timezone {
                cfg.set_timezone(tz).map_err(AdminError::from)?;
            }
            if let Some(v) = word_cap {
                cfg.response_word_cap = *v;
            }
            if *warn_only {
                cfg.word_cap_mode = CapMode::Warn;
            }
            cfg.llm_seed = cli.seed;
            admin::create_study(&cli.store, &cfg)?;
            println!("{}", json!({"study_id": cfg.study_id, "store": cli.store}));
        }
        Command::Study(StudyCmd::Assign { .. }) => {
            admin::load_study(&cli.store)?;
            let store = open_store(&cli.store)?;
            let assigned = admin::assign_conditions(&store, cli.seed)?;
            let out: Vec<_> = assigned.iter().map(|(t, c)| json!({"team_id": t, "condition": c})).collect();
            println!("{}", serde_json::Value::Array(out));
        }
        Command::Team(TeamCmd::Add {
            team_id,
            condition,
            task_name,
        }) => {
            admin::load_study(&cli.store)?;
            let store = open_store(&cli.store)?;
            let team = admin::add_team(&store, team_id, *condition, task_name)?;
            println!("{}", json!(team));
        }
        Command::Participant(ParticipantCmd::Add {
            participant_id,
            team_id,
            name,
            access_code,
            responsibilities,
            window,
            channel,
        }) => {
            admin::load_study(&cli.store)?;
            let store = open_store(&cli.store)?;
            let rec = admin::add_participant(
                &store,
                &NewParticipant {
                    participant_id: participant_id.clone(),
                    team_id: team_id.clone(),
                    display_name: name.clone(),
                    access_code: access_code.clone(),
                    responsibilities: responsibilities.clone(),
                    preferred_window: *window,
                    notification_channel: *channel,
                },
            )?;
            println!("{}", json!(rec.participant));
        }
        Command::Tick { now } => {
            let cfg = admin::load_study(&cli.store)?;
            let store = open_store(&cli.store)?;
            let svc = Service::new(store, cfg, provider(&cli)?, Arc::new(ManualClock::new(*now)), Arc::new(LogDispatcher))
                .map_err(|e| fail("service_error", e))?;
            let report = svc.tick().map_err(|e| fail("tick_failed", e))?;
            println!("{}", json!(report));
        }
        Command::Simulate {
            days,
            teams_per_condition,
            out,
        } => {
            let opts = SimulationOptions {
                interval_days: *days,
                seed: cli.seed,
                teams_per_condition: *teams_per_condition,
            };
            let sim = simulate::run(&opts, Arc::new(Store::in_memory())).map_err(|e| fail("simulation_failed", e))?;
            write_out(out.as_deref(), &sim.jsonl)?;
        }
        Command::Export { format, out } => {
            admin::load_study(&cli.store)?;
            let format: ExportFormat = format.parse().map_err(AdminError::from)?;
            let store = open_store(&cli.store)?;
            let text = export(&store, format).map_err(AdminError::from)?;
            write_out(out.as_deref(), &text)?;
        }
        Command::Analyze { survey, json } => {
            let rows: Vec<SurveyRow> = match survey {
                Some(p) => {
                    let f = fs::File::open(p).map_err(|e| fail("io_error", format!("{}: {e}", p.display())))?;
                    parse_survey_csv(f).map_err(|e| fail("analysis_error", e))?
                }
                None => {
                    admin::load_study(&cli.store)?;
                    open_store(&cli.store)?.all::<SurveyRow>().map_err(AdminError::from)?
                }
            };
            let report = analyze(&rows).map_err(|e| fail("analysis_error", e))?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&report).map_err(|e| fail("io_error", e))?);
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Serve {
            port,
            static_dir,
            tick_seconds,
        } => {
            let cfg = admin::load_study(&cli.store)?;
            let store = open_store(&cli.store)?;
            let svc = Service::new(store, cfg, provider(&cli)?, Arc::new(SystemClock), Arc::new(LogDispatcher))
                .map_err(|e| fail("service_error", e))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| fail("runtime_error", e))?;
            let addr = SocketAddr::from(([0, 0, 0, 0], *port));
            rt.block_on(reflect_service::http::serve(
                Arc::new(svc),
                addr,
                static_dir.clone(),
                std::time::Duration::from_secs((*tick_seconds).max(1)),
            ))
            .map_err(|e| fail("serve_error", e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({"error": f.code, "message": f.message}));
            ExitCode::FAILURE
        }
    }
}
